"""
Приложение подъёма 2D-детекций в 3D-рамки по карте глубины
и семантической маске.

Содержит геометрию и рамки, кодирование целей, подготовку ROI, сеть
с обучением, набор оценки в формате KITTI, генератор синтетических сцен,
Celery-задачи и management-команды.
"""
