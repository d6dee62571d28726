# Empty __init__.py file for tests directory
