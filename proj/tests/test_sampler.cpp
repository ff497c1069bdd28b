// REPLACE
