//! Holds the `acceptance` test target, which trains and checks complete
//! models. It lives in its own package so it runs after the core suites.
