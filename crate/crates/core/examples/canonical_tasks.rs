//! Sample the three canonical tasks and round-trip them through JSONL.

use posym::tasks::{generate_dataset, read_jsonl, write_jsonl, AnswerConvention, TaskKind, TaskVocabulary};

fn main() -> posym::Result<()> {
    let n = 9;
    let vocabs = [
        TaskVocabulary::index(4, n - 1)?,
        TaskVocabulary::retrieval(4, 3)?,
        TaskVocabulary::partial_induction(4, 3)?,
        TaskVocabulary::new(TaskKind::Retrieval, 4, 3, AnswerConvention::Integer)?,
    ];
    for vocab in &vocabs {
        println!(
            "{} ({:?}, vocabulary of {})",
            vocab.kind,
            vocab.convention,
            vocab.size()
        );
        let data = generate_dataset(n, vocab, 3, 11, 0)?;
        for inst in &data {
            println!("  {}   answer at slot {}", inst.render(), inst.answer_position);
        }
        let mut buf = Vec::new();
        write_jsonl(&data, &mut buf)?;
        assert_eq!(read_jsonl(buf.as_slice())?, data);
    }
    Ok(())
}
