# Generated by Django 5.2.7 on 2026-10-17 09:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ScenarioRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=255)),
                ('mode', models.CharField(choices=[('sim', 'Simulation'), ('live', 'Live')], default='sim', max_length=8)),
                ('seed', models.PositiveBigIntegerField(blank=True, null=True)),
                ('log_dir', models.CharField(blank=True, max_length=1024)),
                ('generated_items', models.PositiveIntegerField(default=0)),
                ('predicted_items', models.PositiveIntegerField(default=0)),
                ('total_working_duration_us', models.BigIntegerField(blank=True, null=True)),
                ('backlog_us', models.BigIntegerField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
            },
        ),
        migrations.CreateModel(
            name='ReportRow',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('metric', models.CharField(max_length=64)),
                ('statistic', models.CharField(max_length=16)),
                ('value', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='rows', to='metrics.scenariorun')),
            ],
            options={
                'ordering': ['id'],
                'unique_together': {('run', 'metric', 'statistic')},
            },
        ),
    ]
