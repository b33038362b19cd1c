import os
import sys

import django

# Los tests son de Django: el proyecto vive en mnpCore/ y usa mnpCore.settings.
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "mnpCore"))
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "mnpCore.settings")
django.setup()
