from django.contrib import admin
from .models import ExperimentRun

@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('command', 'config_hash', 'exit_code', 'created_at')
    list_filter = ('command', 'exit_code')
    search_fields = ('command', 'config_hash')
    readonly_fields = ('command', 'config', 'config_hash', 'exit_code', 'summary', 'created_at')
