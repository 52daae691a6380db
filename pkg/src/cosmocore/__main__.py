from cosmocore.cli import main

raise SystemExit(main())
