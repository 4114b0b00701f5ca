"""Episode simulation, navigation metrics and proxy-task samples."""
