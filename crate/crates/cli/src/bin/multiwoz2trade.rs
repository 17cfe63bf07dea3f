//! `multiwoz2trade <data.json> <out.json>`: rewrites raw MultiWOZ annotations
//! in the corpus format the `trade` tool reads.

use std::process::ExitCode;

use trade_core::corpus::{convert_multiwoz, save_corpus};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output] = args.as_slice() else {
        eprintln!("usage: multiwoz2trade <data.json> <out.json>");
        return ExitCode::from(1);
    };
    let text = match std::fs::read_to_string(input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {input}: {e}");
            return ExitCode::from(1);
        }
    };
    let corpus = match convert_multiwoz(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = save_corpus(&corpus, output) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    println!("{} dialogues, {} turns, {} pairs", corpus.len(), corpus.turn_count(), corpus.ontology().pairs().len());
    ExitCode::SUCCESS
}
