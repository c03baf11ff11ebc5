//! mdbook cannot run listings that depend on workspace crates, so each chapter
//! of `book/src` is mounted here as a module doc and `cargo test --doc` runs
//! its code blocks. A failing doc-test names the chapter module.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/embedding.md")]
pub mod embedding {}
#[doc = include_str!("../../../book/src/experts.md")]
pub mod experts {}
#[doc = include_str!("../../../book/src/reflection.md")]
pub mod reflection {}
#[doc = include_str!("../../../book/src/environment.md")]
pub mod environment {}
#[doc = include_str!("../../../book/src/agent.md")]
pub mod agent {}
#[doc = include_str!("../../../book/src/world.md")]
pub mod world {}
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
#[doc = include_str!("../../../book/src/statistics.md")]
pub mod statistics {}
#[doc = include_str!("../../../book/src/remote.md")]
pub mod remote {}

#[cfg(test)]
mod tests {
    /// Every chapter listed in the summary is mounted above.
    #[test]
    fn summary_matches_mounted_chapters() {
        let summary = include_str!("../../../book/src/SUMMARY.md");
        let lib = include_str!("lib.rs");
        let mut n = 0;
        for line in summary.lines() {
            if let Some(start) = line.find("](") {
                let file = &line[start + 2..line.rfind(')').unwrap()];
                let needle = format!("book/src/{file}\")]");
                assert!(lib.contains(&needle), "{file} is not mounted");
                n += 1;
            }
        }
        assert_eq!(n, 10);
    }
}
