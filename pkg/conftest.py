"""Configure Django for pytest, the way ``manage.py test`` does."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sweeping_control.settings')
django.setup()
