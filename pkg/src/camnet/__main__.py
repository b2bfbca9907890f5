from camnet.cli import main

main()
