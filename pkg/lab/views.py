from rest_framework import status, viewsets
from rest_framework.permissions import AllowAny
from rest_framework.response import Response
from rest_framework.views import APIView

from . import runner
from .coeffs import classify_loss
from .models import ExperimentRun
from .serializers import ClassifyQuerySerializer, ExperimentRunSerializer, RunRequestSerializer

STATUS_BY_EXIT_CODE = {
    0: status.HTTP_201_CREATED,
    1: status.HTTP_400_BAD_REQUEST,
    2: status.HTTP_422_UNPROCESSABLE_ENTITY,
}


def record_run(result: runner.RunResult) -> ExperimentRun:
    return ExperimentRun.objects.create(
        command=result.command,
        config=result.config,
        config_hash=result.config_hash,
        exit_code=result.exit_code,
        summary=result.summary,
    )


class ExperimentRunViewSet(viewsets.ModelViewSet):
    """
    API endpoint for laboratory runs. POST executes a command in-process and records it.
    """
    queryset = ExperimentRun.objects.all()
    serializer_class = ExperimentRunSerializer
    permission_classes = [AllowAny]
    filterset_fields = ['command', 'exit_code']
    http_method_names = ['get', 'post', 'head', 'options']

    def create(self, request, *args, **kwargs):
        serializer = RunRequestSerializer(data=request.data)
        if not serializer.is_valid():
            return Response(serializer.errors, status=status.HTTP_400_BAD_REQUEST)
        data = serializer.validated_data
        result = runner.run(data['command'], data['config'], data['overrides'])
        experiment = record_run(result)
        body = dict(self.get_serializer(experiment).data, files=result.files)
        return Response(body, status=STATUS_BY_EXIT_CODE.get(result.exit_code, status.HTTP_422_UNPROCESSABLE_ENTITY))


class ClassifyView(APIView):
    """Loss-of-regularity label of a catalog nu."""
    permission_classes = [AllowAny]

    def get(self, request):
        serializer = ClassifyQuerySerializer(data=request.query_params)
        if serializer.is_valid():
            nu = serializer.validated_data['nu']
            return Response({'kind': nu.kind, 'loss': classify_loss(nu)})
        return Response(serializer.errors, status=status.HTTP_400_BAD_REQUEST)
