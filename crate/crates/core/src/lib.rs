pub mod align;
pub mod corpus;
pub mod embed;
pub mod evalharness;
pub mod knn;
pub mod matcher;
pub mod querylang;
pub mod retrieval;
