//! Executable checks: consensus reports, legality, benefit, resilience.
