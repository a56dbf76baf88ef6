//! Scenario files: the JSON surface the command line consumes.
