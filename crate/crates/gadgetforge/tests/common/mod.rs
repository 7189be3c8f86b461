//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// Absolute path of a checked-in file under `tests/data/`.
pub fn data_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Two-function C fixture: `handler` feeds local buffers into `copy_into`,
/// whose `strcpy` call is the slicing seed. Line numbers are load-bearing —
/// the oracle below names them — so keep this text exactly 12 lines.
pub const INTERPROCEDURAL_SOURCE: &str = "\
void copy_into(char *dst, char *src)
{
    strcpy(dst, src);
}
void handler(int n)
{
    char stack[64];
    char *payload = source();
    int other = n + 1;
    copy_into(stack, payload);
    report(other);
}
";

/// Hand-built data-dependence slice for the `strcpy` site above, derived by
/// tracing assignments backwards on paper:
///
/// - `strcpy(dst, src)` (line 3) names `dst` and `src`;
/// - both are parameters of `copy_into` (declared on line 1), so the walk
///   continues in the caller at the `copy_into(stack, payload)` site (line 10);
/// - `stack` is declared on line 7 and `payload` on line 8;
/// - `int other = n + 1;` (line 9) and `report(other);` (line 11) touch no
///   traced variable and stay out.
///
/// Caller lines come first, each function's lines ascending, so the slice is
/// 7, 8, 10 (handler) then 1, 3 (copy_into).
pub const INTERPROCEDURAL_ORACLE: [(&str, u32); 5] =
    [("f.c", 7), ("f.c", 8), ("f.c", 10), ("f.c", 1), ("f.c", 3)];
