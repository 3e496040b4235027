"""Pipeline schedule builders and the order planner they share."""
