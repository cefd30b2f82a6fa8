from django.db import models


class ExperimentRun(models.Model):
    command = models.CharField(max_length=32)
    config = models.JSONField(default=dict)
    config_hash = models.CharField(max_length=64)
    exit_code = models.PositiveSmallIntegerField()
    summary = models.JSONField(default=dict)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ('-created_at', '-id')

    @property
    def passed(self):
        return self.exit_code == 0

    def __str__(self):
        return f"{self.command} {self.config_hash[:12]} (exit {self.exit_code})"
