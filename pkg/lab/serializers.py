import math

from rest_framework import serializers

from . import exprlang
from .coeffs import CUSTOM, NU_KINDS, CoefficientProfile, ExprCoefficient, NuFunction
from .exceptions import ConfigurationError
from .models import ExperimentRun
from .reporting import CSV, FORMATS
from .spectral import BOUNDARIES, DIRICHLET, MagneticOperator1D
from .zones import ZoneParams

COMMANDS = ('eigen', 'zones', 'solve', 'verify', 'counterexample', 'classify')
FITTED = 'fitted'


class ExpressionField(serializers.CharField):
    """A string parsed into an expression tree whose only free variable is ``variable``."""

    def __init__(self, variable, **kwargs):
        self.variable = variable
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        source = super().to_internal_value(data)
        try:
            tree = exprlang.parse(source)
        except ConfigurationError as exc:
            raise serializers.ValidationError(str(exc))
        extra = exprlang.free_variables(tree) - {self.variable}
        if extra:
            raise serializers.ValidationError(
                f"unbound variable {sorted(extra)[0]!r}; only {self.variable!r} is allowed here")
        return tree

    def to_representation(self, value):
        if isinstance(value, str):
            return value
        return exprlang.to_source(value)


class LossConstantField(serializers.FloatField):
    """A non-negative c1, or ``"fitted"`` to take it from the estimate verification of the run."""

    def to_internal_value(self, data):
        if data == FITTED:
            return FITTED
        return super().to_internal_value(data)

    def run_validators(self, value):
        if value != FITTED:
            super().run_validators(value)

    def to_representation(self, value):
        if value == FITTED:
            return value
        return super().to_representation(value)


class SectionSerializer(serializers.Serializer):
    """Rejects keys the section does not define."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown setting.'] for key in unknown})
        return super().to_internal_value(data)


def _build(factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except ConfigurationError as exc:
        raise serializers.ValidationError(str(exc))


class DomainSerializer(SectionSerializer):
    length = serializers.FloatField(default=math.pi)
    potential = ExpressionField(variable='x', default=exprlang.Num(0.0))
    boundary = serializers.ChoiceField(choices=BOUNDARIES, default=DIRICHLET)
    modes = serializers.IntegerField(min_value=1, default=20)
    sample = ExpressionField(variable='x', required=False, default=None, allow_null=True)

    def validate(self, data):
        data['operator'] = _build(MagneticOperator1D, data['length'], data['potential'], data['boundary'])
        return data


NU_DEFAULT = {'kind': 'log', 'c': 1.0, 'gamma': 1.0, 'gammas': [], 'expr': None}


class NuSerializer(SectionSerializer):
    """Either a catalog tag, an expression in t, or an object with the catalog parameters."""
    kind = serializers.ChoiceField(choices=NU_KINDS)
    c = serializers.FloatField(default=1.0)
    gamma = serializers.FloatField(default=1.0)
    gammas = serializers.ListField(child=serializers.FloatField(), default=list)
    expr = ExpressionField(variable='t', required=False, default=None, allow_null=True)

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = {'kind': data} if data in NU_KINDS else {'kind': CUSTOM, 'expr': data}
        return super().to_internal_value(data)

    def validate(self, data):
        if data['kind'] == CUSTOM and data.get('expr') is None:
            raise serializers.ValidationError({'expr': ['A custom nu needs an expression in t.']})
        return data


class CoefficientSerializer(SectionSerializer):
    b = ExpressionField(variable='t', default=exprlang.Num(1.0))
    nu = NuSerializer(default=NU_DEFAULT)
    T = serializers.FloatField(default=0.5)

    def validate_T(self, value):
        if not value > 0:
            raise serializers.ValidationError('T must be positive.')
        return value

    def validate(self, data):
        nu_data = dict(NU_DEFAULT, **data['nu'])
        nu = _build(NuFunction, nu_data['kind'], data['T'], nu_data['c'], nu_data['gamma'],
                    tuple(nu_data['gammas']), nu_data['expr'])
        data['profile'] = CoefficientProfile(_build(ExprCoefficient, data['b']), nu)
        return data


class ZonesSerializer(SectionSerializer):
    M = serializers.FloatField(default=16.0)
    P = serializers.IntegerField(min_value=0, default=4)

    def validate(self, data):
        data['params'] = _build(ZoneParams, data['M'], data['P'])
        return data


class SolverSerializer(SectionSerializer):
    rel_tol = serializers.FloatField(default=1e-10)
    abs_tol = serializers.FloatField(default=1e-12)
    u0 = serializers.FloatField(default=0.0)
    u1 = serializers.FloatField(default=1.0)

    def validate(self, data):
        for name in ('rel_tol', 'abs_tol'):
            if not data[name] > 0:
                raise serializers.ValidationError({name: ['Tolerances must be positive.']})
        return data


class SweepSerializer(SectionSerializer):
    lambda_min = serializers.FloatField(default=64.0)
    lambda_max = serializers.FloatField(default=1024.0)
    per_octave = serializers.IntegerField(min_value=1, default=1)
    t_points = serializers.IntegerField(min_value=2, default=64)

    def validate(self, data):
        if not 0 < data['lambda_min'] <= data['lambda_max']:
            raise serializers.ValidationError('Need 0 < lambda_min <= lambda_max.')
        return data


class CounterexampleSerializer(SectionSerializer):
    epsilon = serializers.FloatField(default=0.05)
    p = serializers.IntegerField(min_value=2, default=8)
    k_max = serializers.IntegerField(min_value=1, default=8)
    psi_r = serializers.FloatField(default=2.0)
    a0 = serializers.IntegerField(default=1)
    c1 = LossConstantField(min_value=0.0, default=1.0)

    def validate_epsilon(self, value):
        if not value > 0:
            raise serializers.ValidationError('epsilon must be positive.')
        return value

    def validate_psi_r(self, value):
        if not 0 < value < math.pi:
            raise serializers.ValidationError('psi_r must lie in (0, pi).')
        return value


class OutputSerializer(SectionSerializer):
    dir = serializers.CharField(default='', allow_blank=True)
    format = serializers.ChoiceField(choices=FORMATS, default=CSV)


class RunConfigSerializer(SectionSerializer):
    domain = DomainSerializer()
    coefficient = CoefficientSerializer()
    zones = ZonesSerializer()
    solver = SolverSerializer()
    sweep = SweepSerializer()
    counterexample = CounterexampleSerializer()
    output = OutputSerializer()

    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError({'non_field_errors': ['A run config must be a JSON object.']})
        filled = {name: data.get(name, {}) for name in self.fields}
        filled.update({key: value for key, value in data.items() if key not in self.fields})
        return super().to_internal_value(filled)


class RunRequestSerializer(serializers.Serializer):
    command = serializers.ChoiceField(choices=COMMANDS)
    config = serializers.JSONField(default=dict)
    overrides = serializers.ListField(child=serializers.CharField(), default=list)


class ExperimentRunSerializer(serializers.ModelSerializer):
    passed = serializers.BooleanField(read_only=True)

    class Meta:
        model = ExperimentRun
        fields = ('id', 'command', 'config', 'config_hash', 'exit_code', 'passed', 'summary', 'created_at')
        read_only_fields = ('id', 'command', 'config', 'config_hash', 'exit_code', 'summary', 'created_at')


class ClassifyQuerySerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=[k for k in NU_KINDS if k != CUSTOM])
    c = serializers.FloatField(default=1.0)
    gamma = serializers.FloatField(default=0.5)
    gammas = serializers.CharField(default='', allow_blank=True)
    T = serializers.FloatField(default=0.01)

    def validate(self, data):
        try:
            gammas = tuple(float(g) for g in data['gammas'].split(',') if g.strip())
        except ValueError:
            raise serializers.ValidationError({'gammas': ['Comma-separated numbers expected.']})
        data['nu'] = _build(NuFunction, data['kind'], data['T'], data['c'], data['gamma'], gammas)
        return data
