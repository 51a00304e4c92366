from cbf.database.models import get_database_url, init_db

if __name__ == "__main__":
    print(f"Initializing run registry at {get_database_url()}...")
    init_db()
    print("Run registry initialized successfully!")
