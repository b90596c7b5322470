"""Count-matrix ingestion, configuration files and persistence."""
