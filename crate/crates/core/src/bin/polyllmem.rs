fn main() {
    let code = polyllmem::cli::run(std::env::args_os(), &mut std::io::stdin().lock(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
