//! BM25 lookup over the bundled knowledge base.
//!
//! cargo run --example kb_query -- "correlated subquery in where clause"

use quite::kb::{Corpus, RetrieveOptions};

fn main() {
    let query = std::env::args().skip(1).collect::<Vec<_>>().join(" ");
    let query = if query.is_empty() { "correlated subquery aggregate".to_string() } else { query };
    let corpus = Corpus::fixture();
    let opts = RetrieveOptions { k: 3, drop_zero: true, ..RetrieveOptions::default() };
    for hit in corpus.retrieve(&query, &opts) {
        println!("{:7.3}  {}  [{}]  {}", hit.score, hit.entry.id, hit.entry.category.as_str(), hit.entry.question.text_que);
    }
}
