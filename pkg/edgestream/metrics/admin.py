from django.contrib import admin
from .models import ScenarioRun, ReportRow


class ReportRowInline(admin.TabularInline):
	model = ReportRow
	extra = 0
	fields = ('metric', 'statistic', 'value')
	readonly_fields = ('metric', 'statistic', 'value')


@admin.register(ScenarioRun)
class ScenarioRunAdmin(admin.ModelAdmin):
	list_display = ('name', 'mode', 'seed', 'predicted_items', 'backlog_us', 'created_at')
	list_filter = ('mode',)
	search_fields = ('name', 'log_dir')
	inlines = [ReportRowInline]


@admin.register(ReportRow)
class ReportRowAdmin(admin.ModelAdmin):
	list_display = ('metric', 'statistic', 'value', 'run')
	list_filter = ('statistic',)
	search_fields = ('metric', 'run__name')
