// Placeholder so the target links while the criteria are being written.
int main() { return 1; }
