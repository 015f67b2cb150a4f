from duplex.cli import main

main()
