from django.db import models, transaction


class ScenarioRun(models.Model):
    """
    One simulated or live run whose metric report was persisted.
    """
    MODE_SIM = 'sim'
    MODE_LIVE = 'live'

    MODE_CHOICES = (
        (MODE_SIM, 'Simulation'),
        (MODE_LIVE, 'Live'),
    )

    name = models.CharField(max_length=255)
    mode = models.CharField(max_length=8, choices=MODE_CHOICES, default=MODE_SIM)
    seed = models.PositiveBigIntegerField(null=True, blank=True)
    log_dir = models.CharField(max_length=1024, blank=True)
    generated_items = models.PositiveIntegerField(default=0)
    predicted_items = models.PositiveIntegerField(default=0)
    # Microseconds; empty when no tuple completed.
    total_working_duration_us = models.BigIntegerField(null=True, blank=True)
    backlog_us = models.BigIntegerField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at', '-id']

    def __str__(self):
        return f'{self.name} ({self.get_mode_display()})'

    @classmethod
    def record(cls, report, name, mode=MODE_SIM, seed=None, log_dir=''):
        """Store a MetricReport together with all of its rows."""
        with transaction.atomic():
            run = cls.objects.create(
                name=name,
                mode=mode,
                seed=seed,
                log_dir=str(log_dir),
                generated_items=report.totals.get('generated_items', 0),
                predicted_items=report.skipped.get('predicted', 0),
                total_working_duration_us=report.total_working_duration,
                backlog_us=report.backlog,
            )
            ReportRow.objects.bulk_create([
                ReportRow(run=run, metric=metric, statistic=statistic, value=float(value))
                for metric, statistic, value in report.rows()
            ])
        return run


class ReportRow(models.Model):
    run = models.ForeignKey(
        ScenarioRun,
        on_delete=models.CASCADE,
        related_name='rows'
    )
    metric = models.CharField(max_length=64)
    statistic = models.CharField(max_length=16)
    value = models.FloatField()

    class Meta:
        unique_together = ('run', 'metric', 'statistic')
        ordering = ['id']

    def __str__(self):
        return f'{self.metric}.{self.statistic} = {self.value}'
