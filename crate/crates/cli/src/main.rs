use clap::Parser;
use conport_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(output) => {
            for line in output.notes {
                println!("{line}");
            }
            for f in output.files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("conport {}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}
