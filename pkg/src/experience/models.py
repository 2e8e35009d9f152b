from django.utils.translation import gettext_lazy as _
from django.db import models


class ExperimentRun(models.Model):
    """one seed of one experiment config"""
    kind = models.CharField(max_length=16)
    preset = models.CharField(max_length=150)
    flavor = models.CharField(max_length=16)
    replay_strategy = models.CharField(max_length=16)
    seed = models.PositiveBigIntegerField()
    trace_path = models.CharField(max_length=500, default='')
    record_count = models.PositiveBigIntegerField(default=0)
    violation_count = models.PositiveBigIntegerField(default=0)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(default=None, null=True)

    class RunStatus(models.TextChoices):
        """enum for saving run status"""
        # pylint: disable=R0901
        RUNNING = "RU", _("Running")
        PASSED = "PA", _("Passed")
        VIOLATION = "VI", _("Bound violation")
        DIVERGED = "DI", _("Diverged")

    status = models.CharField(
        max_length=2,
        choices=RunStatus,
        default=RunStatus.RUNNING,
    )

    def __str__(self):
        return f"ExperimentRun({self.kind}/{self.flavor} seed={self.seed}): {self.status}"
