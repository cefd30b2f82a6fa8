import json

from django.core.management.base import BaseCommand, CommandError
from rest_framework.utils.encoders import JSONEncoder

from lab import runner
from lab.exceptions import LabError
from lab.serializers import COMMANDS
from lab.views import record_run


class Command(BaseCommand):
    help = (
        "Run a laboratory command on a JSON run config. Any config leaf can be overridden "
        "with --section.key=value (or --set section.key=value)."
    )

    def add_arguments(self, parser):
        parser.add_argument('subcommand', choices=COMMANDS)
        parser.add_argument('config', nargs='?', help="path to the JSON run config (defaults apply when omitted)")
        parser.add_argument('--set', action='append', default=[], dest='overrides', metavar='KEY=VALUE',
                            help="override one config leaf, e.g. --set zones.P=10")
        parser.add_argument('--record', action='store_true', help="store the run as an ExperimentRun")

    def run_from_argv(self, argv):
        rewritten = []
        for arg in argv:
            key = arg[2:].partition('=')[0]
            if arg.startswith('--') and '.' in key and '=' in arg:
                rewritten.append('--set=' + arg[2:])
            else:
                rewritten.append(arg)
        super().run_from_argv(rewritten)

    def handle(self, *args, **options):
        try:
            raw = runner.load_config(options['config']) if options['config'] else {}
        except LabError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code)

        result = runner.run(options['subcommand'], raw, options['overrides'])
        if options['record']:
            experiment = record_run(result)
            self.stderr.write(f"recorded run {experiment.pk}")

        self.stdout.write(json.dumps(result.summary, indent=2, sort_keys=True, cls=JSONEncoder))
        for path in result.files:
            self.stdout.write(path)
        if result.exit_code:
            raise CommandError(result.summary.get('error', 'verification failed'), returncode=result.exit_code)
