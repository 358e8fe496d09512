fn main() {
    let code = lda_aqu_cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
