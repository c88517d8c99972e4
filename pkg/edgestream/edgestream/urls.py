"""
URL configuration for the edgestream project.

Only persisted metric reports are served over HTTP; the runtime itself
speaks the binary wire protocol.
"""
from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('admin/', admin.site.urls),
    path('api/v1/runs/', include('metrics.urls')),
]
