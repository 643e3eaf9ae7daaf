from aratts.cli import main

raise SystemExit(main())
