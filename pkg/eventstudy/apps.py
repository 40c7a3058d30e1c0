from django.apps import AppConfig


class EventStudyConfig(AppConfig):
    name = "eventstudy"
