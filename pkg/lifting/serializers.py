"""
Сериализаторы DRF для приложения `lifting`.

Сериализатор валидирует файл конфигурации запуска (key=value):
у каждого ключа есть документированное значение по умолчанию.
"""
from rest_framework import serializers

from .synthdata import CLASS_DIMENSIONS


class CommaSeparatedField(serializers.Field):
    """
    Список через запятую: "16,32,64" → [16, 32, 64].

    `child` приводит каждый элемент, `length` (если задан) фиксирует длину.
    """

    default_error_messages = {
        "invalid": "Ожидается список значений через запятую.",
        "length": "Ожидается ровно {length} значений, получено {actual}.",
        "empty": "Список не может быть пустым.",
    }

    def __init__(self, child=float, length=None, **kwargs):
        self.child = child
        self.length = length
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        if isinstance(data, (list, tuple)):
            items = list(data)
        elif isinstance(data, str):
            items = [item.strip() for item in data.split(",") if item.strip()]
        else:
            self.fail("invalid")
        if not items:
            self.fail("empty")
        if self.length is not None and len(items) != self.length:
            self.fail("length", length=self.length, actual=len(items))
        try:
            return [self.child(item) for item in items]
        except (TypeError, ValueError):
            self.fail("invalid")

    def to_representation(self, value):
        return ",".join(str(item) for item in value)


def _dims(name: str, std: bool = False) -> CommaSeparatedField:
    mean, spread = CLASS_DIMENSIONS[name]
    values = spread if std else mean
    what = "Разброс" if std else "Средние"
    return CommaSeparatedField(
        length=3,
        default=list(values),
        help_text=f"{what} размеры (h, w, l) класса {name} в синтетических сценах, м",
    )


class RunConfigSerializer(serializers.Serializer):
    """
    Валидация конфигурации запуска.

    У каждого ключа есть значение по умолчанию; неизвестные ключи отклоняются.
    """

    # общие
    seed = serializers.IntegerField(default=0, min_value=0, help_text="Зерно всех генераторов случайных чисел")
    classes = CommaSeparatedField(child=str, default=["Car", "Pedestrian"], help_text="Классы объектов по порядку номеров")

    # камера
    image_width = serializers.IntegerField(default=320, min_value=1, help_text="Ширина изображения, px")
    image_height = serializers.IntegerField(default=96, min_value=1, help_text="Высота изображения, px")
    fx = serializers.FloatField(default=200.0, help_text="Фокусное расстояние по x, px")
    fy = serializers.FloatField(default=200.0, help_text="Фокусное расстояние по y, px")
    cx = serializers.FloatField(default=160.0, help_text="Главная точка по x, px")
    cy = serializers.FloatField(default=40.0, help_text="Главная точка по y, px")
    baseline = serializers.FloatField(default=0.54, help_text="База стереопары, м")

    # синтетические сцены
    objects_min = serializers.IntegerField(default=1, min_value=0, help_text="Минимум объектов в сцене")
    objects_max = serializers.IntegerField(default=4, min_value=0, help_text="Максимум объектов в сцене")
    lateral_range = serializers.FloatField(default=12.0, min_value=0.0, help_text="Поперечный разброс положения, ±м")
    depth_min = serializers.FloatField(default=5.0, help_text="Минимальная глубина объектов, м")
    depth_max = serializers.FloatField(default=40.0, help_text="Максимальная глубина объектов, м")
    ground_y = serializers.FloatField(default=1.65, help_text="Высота камеры над землёй (y плоскости земли), м")
    dims_car = _dims("Car")
    dims_std_car = _dims("Car", std=True)
    dims_pedestrian = _dims("Pedestrian")
    dims_std_pedestrian = _dims("Pedestrian", std=True)
    dims_cyclist = _dims("Cyclist")
    dims_std_cyclist = _dims("Cyclist", std=True)
    render_ground = serializers.BooleanField(default=True, help_text="Рендерить плоскость земли как фон")
    depth_noise = serializers.FloatField(default=0.0, min_value=0.0, help_text="σ гауссова шума глубины, м")
    label_flip_rate = serializers.FloatField(
        default=0.0, min_value=0.0, max_value=1.0, help_text="Доля пикселей объектов, сбрасываемых в фон"
    )
    grid_kind = serializers.ChoiceField(
        choices=["depth", "disparity"], default="depth", help_text="Что писать в файлы сетки: глубину или диспаратность"
    )

    # сеть
    stage_channels = CommaSeparatedField(child=int, default=[16, 32, 64], help_text="Число каналов по стадиям")
    blocks_per_stage = serializers.IntegerField(default=2, min_value=1, help_text="Остаточных блоков на стадию")
    mlp_hidden = serializers.IntegerField(default=256, min_value=1, help_text="Ширина скрытого слоя ветвей")
    bins = serializers.IntegerField(default=2, min_value=2, help_text="Число бинов ориентации")
    precision = serializers.ChoiceField(choices=["f32", "f64"], default="f32", help_text="Точность вычислений")
    activation = serializers.ChoiceField(choices=["relu", "softplus"], default="relu", help_text="Функция активации")

    # функция потерь
    lambda_p = serializers.FloatField(default=1.0, min_value=0.0, help_text="Вес потери Δp")
    lambda_d = serializers.FloatField(default=1.0, min_value=0.0, help_text="Вес потери Δd")
    lambda_theta = serializers.FloatField(default=1.0, min_value=0.0, help_text="Вес потери поправки угла")
    lambda_bin = serializers.FloatField(default=1.0, min_value=0.0, help_text="Вес потери классификации бина")

    # обучение
    augment = serializers.BooleanField(default=True, help_text="Сдвиг 2D-рамок при обучении")
    jitter_fraction = serializers.FloatField(
        default=0.25, min_value=0.0, max_value=0.499, help_text="Максимальный сдвиг угла рамки в долях её размера"
    )
    epochs = serializers.IntegerField(default=10, min_value=0, help_text="Число эпох")
    batch_size = serializers.IntegerField(default=32, min_value=1, help_text="Размер батча")
    learning_rate = serializers.FloatField(default=1e-3, help_text="Шаг Adam")
    clip_norm = serializers.FloatField(default=10.0, help_text="Ограничение глобальной нормы градиента")

    # оценка
    eval_mode = serializers.ChoiceField(choices=["r11", "r40"], default="r40", help_text="Интерполяция AP")
    iou_car = serializers.FloatField(default=0.7, min_value=0.0, max_value=1.0, help_text="Порог IoU для Car")
    iou_pedestrian = serializers.FloatField(default=0.5, min_value=0.0, max_value=1.0, help_text="Порог IoU для Pedestrian")
    iou_cyclist = serializers.FloatField(default=0.5, min_value=0.0, max_value=1.0, help_text="Порог IoU для Cyclist")
    aos_iou_car = serializers.FloatField(default=0.7, min_value=0.0, max_value=1.0, help_text="2D-порог AOS для Car")
    aos_iou_pedestrian = serializers.FloatField(
        default=0.5, min_value=0.0, max_value=1.0, help_text="2D-порог AOS для Pedestrian"
    )
    aos_iou_cyclist = serializers.FloatField(
        default=0.5, min_value=0.0, max_value=1.0, help_text="2D-порог AOS для Cyclist"
    )
    sweep_thresholds = CommaSeparatedField(
        default=[0.3, 0.4, 0.5, 0.6, 0.7], help_text="Пороги IoU для sweep"
    )
    shift_probe_copies = serializers.IntegerField(
        default=10, min_value=1, help_text="Число сдвинутых копий рамки в пробе инвариантности к сдвигу"
    )

    # пути
    dataset_dir = serializers.CharField(default="", allow_blank=True, help_text="Каталог датасета")
    checkpoint_path = serializers.CharField(default="", allow_blank=True, help_text="Путь к чекпойнту")
    output_dir = serializers.CharField(default="", allow_blank=True, help_text="Каталог результатов")

    def validate_classes(self, value):
        unknown = [name for name in value if name not in CLASS_DIMENSIONS]
        if unknown:
            raise serializers.ValidationError(
                f"Неизвестные классы: {', '.join(unknown)}; допустимо: {', '.join(CLASS_DIMENSIONS)}"
            )
        if len(set(value)) != len(value):
            raise serializers.ValidationError("Классы не должны повторяться")
        return value

    def validate_stage_channels(self, value):
        if min(value) < 1:
            raise serializers.ValidationError("Число каналов должно быть ≥ 1")
        return value

    def validate_sweep_thresholds(self, value):
        if not all(0.0 <= t <= 1.0 for t in value):
            raise serializers.ValidationError("Пороги IoU должны лежать в [0, 1]")
        return value

    def validate(self, attrs):
        unknown = sorted(set(self.initial_data) - set(self.fields))
        if unknown:
            raise serializers.ValidationError({"non_field_errors": [f"Неизвестные ключи: {', '.join(unknown)}"]})
        if attrs["objects_min"] > attrs["objects_max"]:
            raise serializers.ValidationError("objects_min не может превышать objects_max")
        if not 1.0 < attrs["depth_min"] < attrs["depth_max"] < 100.0:
            raise serializers.ValidationError("Диапазон глубин должен лежать в (1, 100) м и быть непустым")
        return attrs
