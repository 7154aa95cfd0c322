//! Trains a subword vocabulary on a few names and shows how pairs are encoded.

use relpred::tokenizer::{encode_pair, tokenize_name, train_vocabulary, whole_word_coverage};

fn main() -> relpred::Result<()> {
    let names = [
        "Barack Obama",
        "Hillary Rodham Clinton",
        "United States of America",
        "Honolulu",
        "Chicago",
        "Obama Presidential Center",
    ];
    let vocab = train_vocabulary(names, 60)?;
    println!("{} tokens, whole-word coverage {:.2}", vocab.len(), whole_word_coverage(names, &vocab));

    for name in ["Barack Obama", "Honolulu Zoo", "Ōbama"] {
        let pieces: Vec<&str> = tokenize_name(name, &vocab)
            .into_iter()
            .filter_map(|id| vocab.token(id))
            .collect();
        println!("{name:<16} -> {pieces:?}");
    }

    let seq = encode_pair("Barack Obama", "Honolulu", &vocab, 12)?;
    println!("ids  {:?}", seq.input_ids);
    println!("mask {:?}", seq.attention_mask);
    println!("{:?}", vocab.decode(&seq.input_ids));

    let long = "Hillary Rodham Clinton ".repeat(6);
    let seq = encode_pair(&long, "United States of America", &vocab, 16)?;
    println!("truncated: {:?}", vocab.decode(&seq.input_ids));
    Ok(())
}
