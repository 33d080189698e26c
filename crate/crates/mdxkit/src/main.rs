fn main() {
    std::process::exit(mdxkit::cli::main_with_args(std::env::args_os()));
}
