use std::fs;

use lshensemble::corpus::{
    corpus_stats, domain_stats, ingest_csv, read_corpus, write_corpus, CorpusManifest, HeaderMode, IngestOptions,
};
use lshensemble::partition::PowerLawModel;
use lshensemble::synth::{generate, SynthConfig};
use lshensemble::{Domain, Error};

fn opts(min_size: u64) -> IngestOptions {
    IngestOptions { min_size, ..Default::default() }
}

#[test]
fn column_values_are_deduplicated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    fs::write(&path, "a\na\nb\n").unwrap();
    let report = ingest_csv(&[&path], &IngestOptions { min_size: 1, header: HeaderMode::Absent, delimiter: b',' });
    assert_eq!(report.domains.len(), 1);
    assert_eq!(report.domains[0].values(), &[b"a".to_vec(), b"b".to_vec()]);
}

#[test]
fn small_columns_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let mut text = String::from("nine,ten\n");
    for i in 0..10 {
        text.push_str(&format!("v{},w{i}\n", i.min(8)));
    }
    fs::write(&path, text).unwrap();
    let report = ingest_csv(&[&path], &opts(10));
    assert_eq!(report.skipped_small, 1);
    assert_eq!(report.domains.len(), 1);
    assert!(report.domains.iter().all(|d| d.len() >= 10));
    assert!(report.domains[0].id().ends_with("#1:ten"));
}

#[test]
fn ids_are_stable_and_headers_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    fs::write(&path, "name,score\n alice ,1\nbob,2\n,3\n").unwrap();
    let a = ingest_csv(&[&path], &opts(1));
    let b = ingest_csv(&[&path], &opts(1));
    let ids: Vec<&str> = a.domains.iter().map(Domain::id).collect();
    let name = path.display().to_string();
    assert_eq!(ids, vec![format!("{name}#0:name"), format!("{name}#1:score")]);
    assert_eq!(a.domains, b.domains);
    assert!(a.files[0].has_header);
    // Trimmed, and the empty cell is excluded.
    assert_eq!(a.domains[0].values(), &[b"alice".to_vec(), b"bob".to_vec()]);

    // A numeric first row is data, unless the header is forced.
    fs::write(&path, "1,2\n3,4\n").unwrap();
    assert_eq!(ingest_csv(&[&path], &opts(1)).domains[0].len(), 2);
    let forced = IngestOptions { min_size: 1, header: HeaderMode::Present, delimiter: b',' };
    assert_eq!(ingest_csv(&[&path], &forced).domains[0].len(), 1);
}

#[test]
fn bad_rows_and_missing_files_are_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("g.csv");
    fs::write(&good, "x,y\na,b\nc\nd,e\n").unwrap();
    let missing = dir.path().join("missing.csv");
    let report = ingest_csv(&[&good, &missing], &opts(1));
    assert_eq!(report.malformed_rows(), 1);
    assert_eq!(report.failed_files().count(), 1);
    assert_eq!(report.domains.len(), 2);
    assert_eq!(report.domains[0].len(), 2);
}

#[test]
fn invalid_utf8_is_decoded_lossily() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.csv");
    fs::write(&path, b"col\nok\n\xff\xfe\n").unwrap();
    let report = ingest_csv(&[&path], &opts(1));
    let out = dir.path().join("c.ndjson");
    write_corpus(&report.domains, &out).unwrap();
    assert_eq!(read_corpus(&out).unwrap(), report.domains);
}

#[test]
fn write_then_read_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let domains = generate(&SynthConfig::new(200, PowerLawModel::new(2.0, 10, 300).unwrap(), 3)).unwrap();
    let path = dir.path().join("c.ndjson");
    assert_eq!(write_corpus(&domains, &path).unwrap(), 200);
    assert_eq!(read_corpus(&path).unwrap(), domains);
}

#[test]
fn empty_corpus_file_is_an_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.ndjson");
    fs::write(&path, "").unwrap();
    assert!(read_corpus(&path).unwrap().is_empty());
}

#[test]
fn bad_records_name_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ndjson");
    fs::write(&path, "{\"id\": \"a\", \"values\": [\"x\"]}\n\n{\"id\": \"b\"}\n").unwrap();
    match read_corpus(&path) {
        Err(Error::Record { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("values"), "{message}");
        }
        other => panic!("expected a record error, got {other:?}"),
    }
}

#[test]
fn stats_and_histograms() {
    let equal: Vec<Domain> = (0..5)
        .map(|k| Domain::new(format!("d{k}"), (0..12).map(|v| format!("{k}.{v}"))).unwrap())
        .collect();
    let s = domain_stats(&equal).unwrap();
    assert_eq!(s.histogram.iter().filter(|b| b.count > 0).count(), 1);

    let dir = tempfile::tempdir().unwrap();
    let domains = generate(&SynthConfig::new(5_000, PowerLawModel::new(2.0, 10, 5_000).unwrap(), 8)).unwrap();
    let path = dir.path().join("p.ndjson");
    write_corpus(&domains, &path).unwrap();
    let manifest = CorpusManifest::describe(&domains, vec!["synthetic".into()], 10);
    manifest.write(CorpusManifest::path_for(&path)).unwrap();
    let stats = corpus_stats(&path).unwrap();
    assert_eq!(stats.stats.count, CorpusManifest::read(CorpusManifest::path_for(&path)).unwrap().domain_count);
    // Log-binned counts fall with size; the sparse last bins may be noisy.
    let counts: Vec<u64> = stats.histogram.iter().map(|b| b.count).collect();
    let body = &counts[..counts.len() - 2];
    assert!(body.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
}
