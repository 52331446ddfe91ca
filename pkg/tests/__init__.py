# Test marker for the tests directory
