# vrsense/extensions.py

from apscheduler.schedulers.background import BackgroundScheduler

# Wall-clock ticks for live mode; started on demand by the `live` command.
scheduler = BackgroundScheduler(daemon=True)
