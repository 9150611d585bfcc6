from gazetat.cli import main

main()
