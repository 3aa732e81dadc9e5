from rest_framework import serializers
from rest_framework.fields import empty

from .catalog import get, list_catalog
from .conf import sweep_setting
from .transcription import MODES


class StrictSerializer(serializers.Serializer):
    """Rejects keys that are not declared fields."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["Unknown field."] for key in unknown})
        return super().to_internal_value(data)


class DeltaField(serializers.Field):
    default_error_messages = {'invalid': 'Expected a non-negative number or "auto".'}

    def to_internal_value(self, data):
        if data == 'auto':
            return data
        if isinstance(data, bool) or not isinstance(data, (int, float)) or data < 0:
            self.fail('invalid')
        return float(data)

    def to_representation(self, value):
        return value


class ToleranceSerializer(StrictSerializer):
    adjoint = serializers.FloatField(min_value=0.0, required=False, help_text="Max discrete adjoint residual")
    boundary = serializers.FloatField(min_value=0.0, required=False, help_text="Terminal and initial boundary residuals")
    condition5 = serializers.FloatField(min_value=0.0, required=False, help_text="Control stationarity with nu")
    stationarity = serializers.FloatField(min_value=0.0, required=False, help_text="Non-regular costate and s1-s4 residuals")
    complementarity = serializers.FloatField(min_value=0.0, required=False, help_text="Non-regular complementarity products")
    transversality = serializers.FloatField(min_value=0.0, required=False, help_text="|lambda| at the final node")
    nontriviality = serializers.FloatField(min_value=0.0, required=False, help_text="Lower bound on the normalized multiplier size")
    support = serializers.FloatField(min_value=0.0, required=False, help_text="Largest atom allowed off the contact band")
    active = serializers.FloatField(min_value=0.0, required=False, help_text="Band |psi| <= active counted as contact")
    maximum_gap = serializers.FloatField(min_value=0.0, required=False, allow_null=True,
                                         help_text="Maximum-condition gap; sampled speed scale when omitted")


class RunConfigSerializer(StrictSerializer):
    problem = serializers.CharField(help_text="Catalog problem name")
    N = serializers.IntegerField(min_value=2, default=100, help_text="Number of grid intervals")
    mode = serializers.ChoiceField(choices=MODES, default='penalty', help_text="Transcription route")
    gamma = serializers.FloatField(required=False, help_text="Penalty parameter (must be >= 2M/eta)")
    gammas = serializers.ListField(child=serializers.FloatField(), required=False,
                                   help_text="Increasing penalty parameters for converge")
    grids = serializers.ListField(child=serializers.IntegerField(min_value=2), required=False,
                                  help_text="Grid sizes for converge")
    epsilon_schedule = serializers.ListField(
        child=serializers.FloatField(min_value=0.0), default=lambda: list(sweep_setting('EPSILON_SCHEDULE')),
        help_text="Decreasing complementarity relaxations",
    )
    substeps = serializers.IntegerField(min_value=1, default=10, help_text="Implicit Euler substeps per interval")
    delta = DeltaField(default=0.0, help_text='Mixed-constraint relaxation, or "auto"')
    control = serializers.ListField(child=serializers.FloatField(), required=False,
                                    help_text="Constant control vector (warm start and simulate); zero if omitted")
    tolerances = ToleranceSerializer(required=False, help_text="Certificate tolerance overrides")
    solver_tol = serializers.FloatField(required=False, help_text="KKT tolerance, 0 < tol <= 1e-2")
    max_outer = serializers.IntegerField(min_value=1, required=False, help_text="Augmented Lagrangian outer iterations")
    sample_budget = serializers.IntegerField(min_value=100, default=1000, help_text="Assumption-check samples")
    seed = serializers.IntegerField(default=0, help_text="Random seed")
    output_dir = serializers.CharField(required=False, help_text="Output directory (overridden by --out)")
    trajectory = serializers.CharField(required=False, help_text="Trajectory CSV for the regularity check")

    def validate_problem(self, value):
        if value not in list_catalog():
            raise serializers.ValidationError(f"Unknown problem. Choose one of: {', '.join(list_catalog())}.")
        return value

    def validate_gamma(self, value):
        if not value > 0:
            raise serializers.ValidationError("gamma must be positive.")
        return value

    def validate_gammas(self, value):
        if any(g <= 0 for g in value):
            raise serializers.ValidationError("Every gamma must be positive.")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("gammas must be strictly increasing.")
        return value

    def validate_epsilon_schedule(self, value):
        if not value:
            raise serializers.ValidationError("The schedule needs at least one epsilon.")
        if any(b >= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("The schedule must be strictly decreasing.")
        return value

    def validate_solver_tol(self, value):
        if not 0.0 < value <= 1e-2:
            raise serializers.ValidationError("solver_tol must lie in (0, 1e-2].")
        return value

    def validate(self, attrs):
        control = attrs.get('control')
        if control is not None and len(control) != get(attrs['problem']).spec.m:
            raise serializers.ValidationError({'control': [f"Expected {get(attrs['problem']).spec.m} components."]})
        return attrs


def describe_fields(serializer_class=RunConfigSerializer):
    """One line per config key with its default, for the command help."""
    lines = []
    for name, field in serializer_class().fields.items():
        default = field.default
        if default is empty:
            default = 'required' if field.required else 'optional'
        elif callable(default):
            default = default()
        lines.append(f"  {name}: {field.help_text} [{default}]")
    return '\n'.join(lines)
