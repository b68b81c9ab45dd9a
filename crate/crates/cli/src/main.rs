use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "{} {} {}", record.level(), record.target(), record.args()))
        .init();
    let args: Vec<String> = std::env::args().collect();
    let code = dupforge_cli::run(&args, &mut std::io::stdout().lock());
    std::process::exit(code);
}
