"""Run the command line with `python -m ntm_dialogue`."""

from .cli import main

raise SystemExit(main())
