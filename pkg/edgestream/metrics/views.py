from rest_framework import viewsets
from rest_framework.permissions import AllowAny

from .models import ScenarioRun, ReportRow
from .pagination import ReportRowPagination
from .serializers import ScenarioRunSerializer, ScenarioRunDetailSerializer, ReportRowSerializer


class ScenarioRunViewSet(viewsets.ReadOnlyModelViewSet):
    """
    Persisted metric reports. Runs are written by the sim and metrics_report
    commands; the API only reads them.
    """
    queryset = ScenarioRun.objects.all()
    permission_classes = [AllowAny]

    def get_serializer_class(self):
        if self.action == 'retrieve':
            return ScenarioRunDetailSerializer
        return ScenarioRunSerializer

    def get_queryset(self):
        qs = self.queryset
        name = self.request.query_params.get('name')
        if name:
            qs = qs.filter(name=name)
        mode = self.request.query_params.get('mode')
        if mode:
            qs = qs.filter(mode=mode)
        return qs


class ReportRowViewSet(viewsets.ReadOnlyModelViewSet):
    serializer_class = ReportRowSerializer
    pagination_class = ReportRowPagination
    permission_classes = [AllowAny]

    def get_queryset(self):
        # Rows are always filtered by the run_pk in the URL
        qs = ReportRow.objects.filter(run_id=self.kwargs['run_pk'])
        metric = self.request.query_params.get('metric')
        if metric:
            qs = qs.filter(metric=metric)
        return qs
