//! Doc-test anchors for the book chapters.
