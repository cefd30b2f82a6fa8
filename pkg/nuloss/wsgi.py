"""WSGI entry point serving the laboratory API (``nuloss.wsgi.application``)."""
import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'nuloss.settings')

application = get_wsgi_application()
