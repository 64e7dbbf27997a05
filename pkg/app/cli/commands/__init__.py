# Command modules
