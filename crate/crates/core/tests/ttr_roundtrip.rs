use qdpair::ttr::{read_chunks, read_stream, write_stream, TtrHeader};
use qdpair::TimeTagRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn million_random_records_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut t = 0u64;
    let records: Vec<TimeTagRecord> = (0..1_000_000)
        .map(|_| {
            t += rng.random_range(0..5000);
            TimeTagRecord { timestamp_ps: t, channel: rng.random_range(0..4), flags: rng.random_range(0..2) }
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.ttr");
    let bytes = write_stream(&path, &TtrHeader::new(4, 0), &records).unwrap();
    assert_eq!(bytes, 32 + 16 * 1_000_000);
    let (_, back) = read_stream(&path).unwrap();
    assert_eq!(back, records);

    let mut joined = Vec::new();
    let mut chunks = 0;
    for c in read_chunks(&path, 65_536).unwrap() {
        let c = c.unwrap();
        assert!(c.len() <= 65_536);
        joined.extend(c);
        chunks += 1;
    }
    assert_eq!(chunks, 1_000_000usize.div_ceil(65_536));
    assert_eq!(joined, records);
}
