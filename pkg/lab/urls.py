from django.urls import path, include
from rest_framework.routers import DefaultRouter
from .views import ExperimentRunViewSet, ClassifyView

router = DefaultRouter()
router.register(r'runs', ExperimentRunViewSet)

urlpatterns = [
    path('api/classify/', ClassifyView.as_view(), name='classify'),
    path('api/', include(router.urls)),
]
