# Generated by Django 4.2.27 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='EvaluationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Дата запуска')),
                ('gt_dir', models.CharField(max_length=1000, verbose_name='Каталог эталонной разметки')),
                ('det_dir', models.CharField(max_length=1000, verbose_name='Каталог детекций')),
                ('mode', models.CharField(choices=[('r11', 'R11'), ('r40', 'R40')], default='r40', max_length=10, verbose_name='Интерполяция AP')),
                ('metrics', models.JSONField(default=dict, help_text='Плоский словарь класс.уровень.метрика → значение', verbose_name='Метрики')),
                ('report_text', models.TextField(blank=True, default='', verbose_name='Текст отчёта')),
            ],
            options={
                'verbose_name': 'Запуск оценки',
                'verbose_name_plural': 'Запуски оценки',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='Дата запуска')),
                ('dataset_dir', models.CharField(max_length=1000, verbose_name='Каталог датасета')),
                ('checkpoint_path', models.CharField(max_length=1000, verbose_name='Чекпойнт')),
                ('config_hash', models.CharField(max_length=64, verbose_name='Хеш конфигурации')),
                ('epochs', models.PositiveIntegerField(default=0, verbose_name='Число эпох')),
                ('augment', models.BooleanField(default=True, verbose_name='Аугментация сдвигом рамок')),
                ('final_loss', models.FloatField(blank=True, null=True, verbose_name='Итоговая потеря')),
                ('loss_history', models.JSONField(default=list, help_text='Список словарей по эпохам: epoch, total и слагаемые', verbose_name='История потерь')),
                ('status', models.CharField(choices=[('processing', 'В обработке'), ('completed', 'Завершено'), ('failed', 'Ошибка')], default='processing', max_length=50, verbose_name='Статус')),
                ('error_message', models.TextField(blank=True, null=True, verbose_name='Сообщение об ошибке')),
            ],
            options={
                'verbose_name': 'Запуск обучения',
                'verbose_name_plural': 'Запуски обучения',
                'ordering': ['-created_at'],
            },
        ),
    ]
