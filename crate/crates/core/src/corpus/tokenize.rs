use super::{Sentence, Token};

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…')
}

/// Splits one whitespace-delimited chunk into tokens: leading and trailing
/// punctuation become single-character tokens, the core stays intact.
fn split_chunk(chunk: &str, out: &mut Vec<Token>) {
    let chars: Vec<char> = chunk.chars().collect();
    let lead = chars.iter().take_while(|c| is_punct(**c)).count();
    if lead == chars.len() {
        out.extend(chars.iter().map(|c| Token::untagged(c.to_string())));
        return;
    }
    let trail = chars.iter().rev().take_while(|c| is_punct(**c)).count();
    out.extend(chars[..lead].iter().map(|c| Token::untagged(c.to_string())));
    out.push(Token::untagged(chars[lead..chars.len() - trail].iter().collect::<String>()));
    out.extend(chars[chars.len() - trail..].iter().map(|c| Token::untagged(c.to_string())));
}

/// Segments raw text into untagged sentences. A sentence ends after `.`,
/// `!` or `?` followed by whitespace (or the end of the text).
pub fn tokenize_raw(text: &str) -> Vec<Sentence> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if is_sentence_end(c) {
            let boundary = match iter.peek() {
                None => true,
                Some((_, n)) => n.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                pieces.push(&text[start..end]);
                start = end;
            }
        }
    }
    pieces.push(&text[start..]);

    pieces
        .into_iter()
        .filter_map(|piece| {
            let mut tokens = Vec::new();
            for chunk in piece.split_whitespace() {
                split_chunk(chunk, &mut tokens);
            }
            (!tokens.is_empty()).then_some(Sentence { tokens })
        })
        .collect()
}
