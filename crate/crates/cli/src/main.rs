fn main() {
    let code = hsaicp_cli::run(std::env::args_os());
    std::process::exit(code);
}
