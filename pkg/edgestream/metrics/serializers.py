from rest_framework import serializers
from .models import ScenarioRun, ReportRow


class ReportRowSerializer(serializers.ModelSerializer):
    class Meta:
        model = ReportRow
        fields = ('id', 'metric', 'statistic', 'value')
        read_only_fields = fields


class ScenarioRunSerializer(serializers.ModelSerializer):
    mode_name = serializers.CharField(source='get_mode_display', read_only=True)
    row_count = serializers.SerializerMethodField()

    class Meta:
        model = ScenarioRun
        fields = (
            'id', 'name', 'mode', 'mode_name', 'seed', 'log_dir', 'generated_items', 'predicted_items',
            'total_working_duration_us', 'backlog_us', 'created_at', 'row_count'
        )
        read_only_fields = fields

    def get_row_count(self, obj):
        return obj.rows.count()


class ScenarioRunDetailSerializer(ScenarioRunSerializer):
    medians = serializers.SerializerMethodField()

    class Meta(ScenarioRunSerializer.Meta):
        fields = ScenarioRunSerializer.Meta.fields + ('medians',)
        read_only_fields = fields

    def get_medians(self, obj):
        return {row.metric: row.value for row in obj.rows.filter(statistic='median')}
