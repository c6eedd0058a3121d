use astrolens::llmclient::{parse_mentioned, render_prompt, MentionStatus, PromptTemplate, TemplateId};

const ORIGINAL: &str = include_str!("data/appendix_original.txt");
const UPDATED: &str = include_str!("data/appendix_updated.txt");

const NAMES_EXPR: &str = "{', '.join(repr(item) for item in name_ids)}";
const TYPE_EXPR: &str = "{tipos[j]}";

fn names() -> Vec<String> {
    [
        "2CXO J004231.2+411621",
        "M31 X-1",
        "O'Brien's star",
        "back\\slash",
        "tab\there",
        "both '\"quotes",
        "ü ☃",
        "ctl\u{7}",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Output of `', '.join(repr(n) for n in names())` under CPython 3.
const PYTHON_RENDERED: &str =
    r#"'2CXO J004231.2+411621', 'M31 X-1', "O'Brien's star", 'back\\slash', 'tab\there', 'both \'"quotes', 'ü ☃', 'ctl\x07'"#;

fn expected(appendix: &str, source_type: &str) -> String {
    appendix.replace(NAMES_EXPR, PYTHON_RENDERED).replace(TYPE_EXPR, source_type)
}

#[test]
fn original_template_matches_appendix() {
    let got = render_prompt(&PromptTemplate::builtin(TemplateId::Original), &names(), "XB").unwrap();
    assert_eq!(got, expected(ORIGINAL, "XB"));
}

#[test]
fn updated_template_matches_appendix() {
    let t = PromptTemplate::builtin(TemplateId::Updated);
    let got = render_prompt(&t, &names(), "Seyfert_2").unwrap();
    assert_eq!(got, expected(UPDATED, "Seyfert_2"));
    assert!(t.has_mention_protocol());
}

#[test]
fn single_alias_renders_without_separator() {
    let got = render_prompt(&PromptTemplate::builtin(TemplateId::Updated), &["NGC 4151".into()], "AGN").unwrap();
    assert_eq!(got, UPDATED.replace(NAMES_EXPR, "'NGC 4151'").replace(TYPE_EXPR, "AGN"));
}

#[test]
fn mention_statuses() {
    let cases = [
        ("[MENTIONED: YES]\nSummary text.", MentionStatus::Yes, "Summary text."),
        ("Preamble\n  [mentioned:no]  \nGeneral summary.", MentionStatus::No, "Preamble\nGeneral summary."),
        ("Nothing to mark.", MentionStatus::Unknown, "Nothing to mark."),
    ];
    for (text, status, body) in cases {
        assert_eq!(parse_mentioned(text), (status, body.to_string()), "{text}");
    }
}
