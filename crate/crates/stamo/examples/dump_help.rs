// Regenerates the pinned CLI help text (tests/golden_help.txt).
fn main() {
    print!("{}", stamo::cli::help_text());
}
