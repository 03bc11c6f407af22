"""Training, evaluation, persistence and I/O around the model."""
