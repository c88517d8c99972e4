from django.urls import path, include
from rest_framework_nested import routers
from .views import ScenarioRunViewSet, ReportRowViewSet

# Runs at /api/v1/runs/, their rows at /api/v1/runs/{run_pk}/rows/
router = routers.SimpleRouter()
router.register(r'', ScenarioRunViewSet, basename='run')

rows_router = routers.NestedSimpleRouter(router, r'', lookup='run')
rows_router.register(r'rows', ReportRowViewSet, basename='run-rows')

urlpatterns = [
    path('', include(router.urls)),
    path('', include(rows_router.urls)),
]
