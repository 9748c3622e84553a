//! Acceptance checks for the misspattern workspace. The checks live in `tests/acceptance.rs`.
