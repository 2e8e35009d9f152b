from django.apps import AppConfig


# pylint: disable=C0115
class ExperienceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'experience'
