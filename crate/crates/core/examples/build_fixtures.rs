//! Regenerates the hermetic fixture bundle under `tests/fixtures/hermetic`:
//! synthetic BIO1..BIO19 GeoTIFFs, a land mask, recorded-format GBIF
//! responses pre-seeded into the response cache, an identifier fixture
//! and run configs.
//!
//!     cargo run -p habitat-core --example build_fixtures

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use habitat::climate::{geotiff, ClimateStack, RasterGrid};
use habitat::http::{sha256_hex, ResponseCache};
use habitat::occurrence::GbifClient;
use habitat::sampling::{LandMask, LatLon};
use habitat::N_BIO;

const YEAR_MAX: i32 = 2024;
const X0: f64 = -6.0;
const Y0: f64 = 52.0;
const CELL: f64 = 0.2;
const NCOLS: usize = 70;
const NROWS: usize = 55;
const NODATA: f64 = -3.4e38;

const LAND: [[f64; 2]; 9] = [
    [-4.5, 48.5],
    [-1.5, 50.5],
    [2.5, 51.2],
    [7.5, 49.5],
    [7.5, 43.5],
    [3.0, 42.4],
    [-1.8, 43.3],
    [-1.2, 46.0],
    [-4.5, 48.5],
];
const LAKE: [[f64; 2]; 5] = [[5.8, 46.2], [6.4, 46.2], [6.4, 46.6], [5.8, 46.6], [5.8, 46.2]];

fn out_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/hermetic")
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap() + "\n").unwrap();
}

/// BIO1..BIO19 for one cell: a small linear SEM driven by latitude,
/// continentality and a smooth relief field, with per-cell noise.
fn cell_climate(lat: f64, lon: f64, rng: &mut ChaCha8Rng) -> [f64; N_BIO] {
    let mut n = |sd: f64| Normal::new(0.0, sd).unwrap().sample(rng);
    let u = (lat - 46.5) / 5.5;
    let v = (lon - 1.0) / 7.0;
    let relief = (lon * 0.9).sin() * (lat * 0.7).cos();
    let mut b = [0.0; N_BIO];
    b[0] = 11.0 - 3.5 * u - 2.5 * relief + n(0.6);
    b[3] = 600.0 + 150.0 * v + n(40.0);
    b[10] = b[0] - 0.012 * b[3] + 6.0 + n(0.5);
    b[9] = b[0] + 0.01 * b[3] - 1.0 + n(0.5);
    b[5] = b[10] - 3.5 + n(0.4);
    b[4] = b[9] + 7.0 + n(0.5);
    b[6] = b[4] - b[5] + n(0.3);
    b[1] = 9.0 + 2.0 * v + n(0.5);
    b[2] = 35.0 + 0.5 * b[1] - 0.3 * b[6] + n(1.0);
    b[7] = b[0] - 2.0 + 1.5 * v + n(0.8);
    b[8] = b[0] + 3.0 - 1.0 * v + n(0.8);
    b[11] = 900.0 - 200.0 * v + 250.0 * relief + n(60.0);
    b[12] = b[11] / 10.0 + n(5.0);
    b[13] = b[11] / 20.0 + n(4.0);
    b[14] = 25.0 + 10.0 * v + n(3.0);
    b[15] = 2.8 * b[12] + n(10.0);
    b[16] = 3.0 * b[13] + n(8.0);
    b[17] = 0.22 * b[11] + n(15.0);
    b[18] = 0.28 * b[11] + n(15.0);
    b.map(|x| x as f32 as f64)
}

fn build_rasters(dir: &Path) -> ClimateStack {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut layers = vec![vec![0.0; NCOLS * NROWS]; N_BIO];
    for r in 0..NROWS {
        for c in 0..NCOLS {
            let lat = Y0 - (r as f64 + 0.5) * CELL;
            let lon = X0 + (c as f64 + 0.5) * CELL;
            let vals = cell_climate(lat, lon, &mut rng);
            // open sea in the north-west corner carries no data
            let sea = lon < -5.0 && lat > 50.0;
            for (k, layer) in layers.iter_mut().enumerate() {
                layer[r * NCOLS + c] = if sea { NODATA as f32 as f64 } else { vals[k] };
            }
        }
    }
    let grids: Vec<RasterGrid> = layers
        .into_iter()
        .map(|v| RasterGrid::new(NCOLS, NROWS, X0, Y0, CELL, NODATA as f32 as f64, v).unwrap())
        .collect();
    for (i, g) in grids.iter().enumerate() {
        geotiff::write_path(g, &dir.join(format!("bio_{}.tif", i + 1)), true).unwrap();
    }
    ClimateStack::new(grids).unwrap()
}

fn land_geojson() -> Value {
    json!({
        "type": "FeatureCollection",
        "features": [{
            "type": "Feature",
            "properties": {"name": "fixture land"},
            "geometry": {"type": "Polygon", "coordinates": [LAND.to_vec(), LAKE.to_vec()]}
        }]
    })
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Presence points on land, thinned by a habitat suitability function of
/// the cell climate.
fn draw_presences(
    n: usize,
    lat_range: (f64, f64),
    lon_range: (f64, f64),
    mask: &LandMask,
    stack: &ClimateStack,
    suitability: impl Fn(&[f64; N_BIO]) -> f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let lat = (rng.random_range(lat_range.0..lat_range.1) * 1e5f64).round() / 1e5;
        let lon = (rng.random_range(lon_range.0..lon_range.1) * 1e5f64).round() / 1e5;
        if !mask.point_on_land(LatLon::new(lat, lon)) {
            continue;
        }
        let Some(bio) = stack.vector_at(lat, lon) else { continue };
        if rng.random::<f64>() < suitability(&bio.0) {
            out.push((lat, lon));
        }
    }
    out
}

fn occurrence(key: u64, dataset: &str, species: &str, lat: f64, lon: f64, year: i32, rng: &mut ChaCha8Rng) -> Value {
    let month = rng.random_range(3..=9);
    let day = rng.random_range(1..=28);
    json!({
        "key": key,
        "datasetKey": sha256_hex(dataset.as_bytes())[..32].to_string(),
        "datasetName": dataset,
        "basisOfRecord": "HUMAN_OBSERVATION",
        "scientificName": species,
        "decimalLatitude": lat,
        "decimalLongitude": lon,
        "year": year,
        "month": month,
        "day": day,
        "eventDate": format!("{year}-{month:02}-{day:02}"),
        "countryCode": "FR",
        "hasGeospatialIssues": false
    })
}

struct SpeciesFixture<'a> {
    name: &'a str,
    scientific_name: &'a str,
    usage_key: u64,
    points: Vec<(f64, f64)>,
}

/// Writes the match response and occurrence pages into the cache and
/// returns the number of records that survive client-side filtering.
fn seed_gbif(cache_root: &Path, sp: &SpeciesFixture, rng: &mut ChaCha8Rng) -> usize {
    let client = GbifClient::new().year_max(YEAR_MAX);
    let cache = ResponseCache::new(cache_root, "gbif");
    let genus = sp.name.split(' ').next().unwrap();
    let matched = json!({
        "usageKey": sp.usage_key,
        "scientificName": sp.scientific_name,
        "canonicalName": sp.name,
        "rank": "SPECIES",
        "status": "ACCEPTED",
        "confidence": 99,
        "matchType": "EXACT",
        "genus": genus,
        "synonym": false
    });
    cache.put(&client.match_url(sp.name), serde_json::to_string(&matched).unwrap().as_bytes()).unwrap();

    let datasets = ["iNaturalist research-grade observations", "Observation.org"];
    let mut results: Vec<Value> = sp
        .points
        .iter()
        .enumerate()
        .map(|(i, &(lat, lon))| {
            let year = 2000 + (i % 25) as i32;
            occurrence(sp.usage_key * 1000 + i as u64, datasets[i % 2], sp.scientific_name, lat, lon, year, rng)
        })
        .collect();
    let valid = results.len();
    // records the client must discard
    let (lat, lon) = sp.points[0];
    let mut dup = occurrence(sp.usage_key * 1000 + 900_001, datasets[0], sp.scientific_name, lat, lon, 2020, rng);
    dup["decimalLatitude"] = json!(lat + 2e-5);
    results.push(dup);
    let mut issue = occurrence(sp.usage_key * 1000 + 900_002, datasets[1], sp.scientific_name, 47.0, 2.0, 2019, rng);
    issue["hasGeospatialIssues"] = json!(true);
    results.push(issue);
    let mut old = occurrence(sp.usage_key * 1000 + 900_003, datasets[0], sp.scientific_name, 46.0, 3.0, 1998, rng);
    old["year"] = json!(1998);
    results.push(old);
    let mut fossil = occurrence(sp.usage_key * 1000 + 900_004, datasets[1], sp.scientific_name, 45.0, 4.0, 2010, rng);
    fossil["basisOfRecord"] = json!("FOSSIL_SPECIMEN");
    results.push(fossil);

    let total = results.len();
    let mut offset = 0;
    for chunk in results.chunks(300) {
        let end = offset + chunk.len() == total;
        let page = json!({
            "offset": offset,
            "limit": 300,
            "endOfRecords": end,
            "count": total,
            "results": chunk
        });
        cache.put(&client.occurrence_url(sp.usage_key, offset), serde_json::to_string(&page).unwrap().as_bytes()).unwrap();
        offset += chunk.len();
    }
    valid
}

fn main() {
    let root = out_dir();
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();

    let stack = build_rasters(&root.join("climate"));
    let land = land_geojson();
    write_json(&root.join("land.geojson"), &land);
    let mask = LandMask::from_geojson_str(&land.to_string()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // mild winters favour presence, hot summers limit it
    let ajuga = draw_presences(
        360,
        (43.0, 50.8),
        (-3.5, 7.0),
        &mask,
        &stack,
        |b| sigmoid(-1.0 + 0.9 * (b[10] - 4.0) - 0.6 * (b[4] - 22.0)),
        &mut rng,
    );
    let osmia = draw_presences(
        80,
        (44.0, 46.5),
        (4.5, 7.0),
        &mask,
        &stack,
        |b| sigmoid(0.5 - 0.004 * (b[11] - 900.0) + 0.4 * (b[1] - 10.0)),
        &mut rng,
    );

    let cache = root.join("cache");
    let species = [
        SpeciesFixture { name: "Ajuga reptans", scientific_name: "Ajuga reptans L.", usage_key: 2927079, points: ajuga },
        SpeciesFixture {
            name: "Osmia parietina",
            scientific_name: "Osmia parietina Curtis, 1828",
            usage_key: 1335453,
            points: osmia,
        },
    ];
    let mut counts = serde_json::Map::new();
    for sp in &species {
        counts.insert(sp.name.to_string(), json!(seed_gbif(&cache, sp, &mut rng)));
    }
    write_json(&root.join("expected_counts.json"), &Value::Object(counts));
    fs::write(cache.join(".gitignore"), "runs/\n").unwrap();

    // stand-in image bytes: a minimal JPEG frame
    let image: Vec<u8> = [&[0xFF, 0xD8, 0xFF, 0xE0][..], b"osmia parietina fixture", &[0xFF, 0xD9]].concat();
    fs::write(root.join("osmia.jpg"), &image).unwrap();
    write_json(
        &root.join("identifier.json"),
        &json!({ sha256_hex(&image): {"scientific_name": "Osmia parietina", "confidence": 0.91} }),
    );

    let base = json!({
        "cache_dir": "cache",
        "climate_dir": "climate",
        "climate_pattern": "bio_{i}.tif",
        "land_mask_path": "land.geojson",
        "seed": 7,
        "offline": true,
        "year_max": YEAR_MAX
    });
    let mut by_name = base.clone();
    by_name["species_name"] = json!("Ajuga reptans");
    write_json(&root.join("config.json"), &by_name);
    let mut by_image = base;
    by_image["image_path"] = json!("osmia.jpg");
    by_image["identifier"] = json!({"fixture_path": "identifier.json"});
    write_json(&root.join("config_image.json"), &by_image);

    println!("fixtures written to {}", root.display());
}
